"""8-bit binary PGM (P5) export for heatmaps and masks.

Quantization is linear from [0, 1] to [0, 255]; values outside [0, 1]
saturate.  Output bytes are fully determined by the input array.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def pgm_bytes(values: np.ndarray) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"PGM export needs a 2-d array, got ndim {arr.ndim}")
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = quantized.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + quantized.tobytes(order="C")


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(values))
