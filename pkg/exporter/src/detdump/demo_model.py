"""A tiny constructed detector plus a synthetic scene generator.

The demo detector is not trained. Its prediction layers are built by
hand so that bright rectangles on a dark background light up the way a
converged dense detector would: class probability tracks local
brightness and every location predicts a roughly object-sized box
centered on itself, so box overlap (and hence quality) peaks at object
centers. Seeded noise on the weights makes two instances genuinely
different models while keeping every forward pass deterministic.

The feature capture mechanics are the real thing — forward hooks on the
conv modules, taken before the nonlinearity.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

_NOISE = 0.02


def _seeded_noise(gen: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    return _NOISE * torch.randn(like.shape, generator=gen)


class DemoDetector(nn.Module):
    """Per level: avg-pool backbone, 1x1 neck, one-conv head towers.

    capture points: `neck` (post-FPN, shared) and the towers' conv
    outputs (first head layer, pre-activation). Anchor count is 1.
    """

    def __init__(self, channels: int, seed: int, num_classes: int,
                 strides: tuple[int, ...]):
        super().__init__()
        self.channels = channels
        self.seed = seed
        self.num_classes = num_classes
        self.strides = tuple(strides)

        gen = torch.Generator().manual_seed(seed)
        self.neck = nn.Conv2d(3, channels, 1)
        self.cls_tower = nn.Conv2d(channels, channels, 3, padding=1)
        self.reg_tower = nn.Conv2d(channels, channels, 3, padding=1)
        self.cls_out = nn.Conv2d(channels, num_classes, 1)
        self.reg_out = nn.Conv2d(channels, 4, 1)

        with torch.no_grad():
            # channel 0 of the neck is the brightness average; the rest
            # are seeded mixtures so the maps are not degenerate
            w = torch.zeros_like(self.neck.weight)
            w[0, :, 0, 0] = 1.0 / 3.0
            self.neck.weight.copy_(w + _seeded_noise(gen, w))
            self.neck.bias.zero_().add_(_seeded_noise(gen, self.neck.bias))

            for tower in (self.cls_tower, self.reg_tower):
                w = torch.zeros_like(tower.weight)
                for c in range(channels):
                    w[c, c, 1, 1] = 1.0  # identity kernel, then perturbed
                tower.weight.copy_(w + _seeded_noise(gen, w))
                tower.bias.zero_().add_(_seeded_noise(gen, tower.bias))

            # every class reads the brightness channel: bright -> confident
            w = torch.zeros_like(self.cls_out.weight)
            w[:, 0, 0, 0] = 6.0
            self.cls_out.weight.copy_(w + _seeded_noise(gen, w))
            self.cls_out.bias.fill_(-3.0)

            # constant box shape: softplus(1.55) * stride ~ 14 px at s=8,
            # which matches the synthetic objects well enough for the
            # overlap to fall off with distance from the object center
            w = torch.zeros_like(self.reg_out.weight)
            self.reg_out.weight.copy_(w + _seeded_noise(gen, w))
            self.reg_out.bias.fill_(1.55)

        self.eval()

    def forward(self, image: torch.Tensor) -> list[dict[str, torch.Tensor]]:
        """image (1, 3, H, W) -> per-level decoded predictions.

        Intermediate feature maps are not returned; the exporter grabs
        them with forward hooks on `neck`, `cls_tower`, and `reg_tower`,
        which fire once per level because the towers are shared across
        the pyramid.
        """
        out = []
        for stride in self.strides:
            pooled = F.avg_pool2d(image, kernel_size=stride)
            neck = self.neck(pooled)
            logits = self.cls_out(F.relu(self.cls_tower(neck)))
            dists = F.softplus(self.reg_out(F.relu(self.reg_tower(neck)))) * stride

            _, _, h, w = neck.shape
            xs = stride * (torch.arange(w, dtype=torch.float32) + 0.5)
            ys = stride * (torch.arange(h, dtype=torch.float32) + 0.5)
            cx = xs.view(1, 1, w).expand(1, h, w)
            cy = ys.view(1, h, 1).expand(1, h, w)
            boxes = torch.stack(
                (cx - dists[:, 0], cy - dists[:, 1],
                 cx + dists[:, 2], cy + dists[:, 3]),
                dim=1,
            )
            out.append(
                {
                    "stride": stride,
                    "probs": torch.sigmoid(logits).unsqueeze(1),  # (1, A=1, K, h, w)
                    "boxes": boxes.unsqueeze(1),                  # (1, A=1, 4, h, w)
                }
            )
        return out


def build_model(channels: int, seed: int, num_classes: int,
                strides: tuple[int, ...]) -> DemoDetector:
    return DemoDetector(channels, seed, num_classes, strides)


def make_sample(
    sample_id: int,
    image_size: tuple[int, int],
    num_classes: int,
    min_side: int = 20,
) -> tuple[np.ndarray, list[dict]]:
    """Deterministic scene: bright rectangles on a dark background.

    Returns (image (3, H, W) float32 in [0, 1], gt dicts with integer
    coordinates).
    """
    width, height = image_size
    rng = np.random.default_rng(sample_id)
    image = np.full((3, height, width), 0.1, dtype=np.float32)
    image += rng.normal(0.0, 0.01, size=image.shape).astype(np.float32)

    gt = []
    count = int(rng.integers(1, 4))
    for _ in range(count):
        for _attempt in range(50):
            w = int(rng.integers(min_side, max(min_side + 1, int(0.4 * width))))
            h = int(rng.integers(min_side, max(min_side + 1, int(0.4 * height))))
            x1 = int(rng.integers(0, width - w + 1))
            y1 = int(rng.integers(0, height - h + 1))
            box = (x1, y1, x1 + w, y1 + h)
            if all(_boxes_overlap(box, (g["x1"], g["y1"], g["x2"], g["y2"])) < 0.2
                   for g in gt):
                break
        brightness = float(rng.uniform(0.75, 0.95))
        image[:, box[1]:box[3], box[0]:box[2]] = brightness
        gt.append(
            {
                "x1": float(box[0]),
                "y1": float(box[1]),
                "x2": float(box[2]),
                "y2": float(box[3]),
                "category": int(rng.integers(0, num_classes)),
            }
        )
    np.clip(image, 0.0, 1.0, out=image)
    return image, gt


def _boxes_overlap(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter) if inter else 0.0
