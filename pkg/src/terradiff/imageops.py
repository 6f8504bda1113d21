"""Image value-range conversions and per-channel color matching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DataError

_DEGENERATE_STD = 1e-8


def to_unit(img_uint8: np.ndarray) -> np.ndarray:
    """uint8 [0,255] -> float32 [-1,1]."""
    return (np.asarray(img_uint8, dtype=np.float32) / 127.5) - 1.0


def to_uint8(img_unit: np.ndarray) -> np.ndarray:
    """float [-1,1] -> uint8; exact inverse of to_unit on integer-valued inputs."""
    x = (np.clip(np.asarray(img_unit, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.floor(x + 0.5).astype(np.uint8)


def hwc_to_chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.moveaxis(img, -1, 0)))


def chw_to_hwc(t: torch.Tensor) -> np.ndarray:
    return np.moveaxis(t.detach().cpu().numpy(), 0, -1)


def sat_to_tensor(sat_uint8: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1]."""
    return hwc_to_chw(to_unit(sat_uint8))


def tensor_to_sat(t: torch.Tensor) -> np.ndarray:
    """(3, H, W) float in [-1, 1] -> (H, W, 3) uint8."""
    return to_uint8(chw_to_hwc(t))


def luminance(img: np.ndarray) -> np.ndarray:
    w = np.array([0.299, 0.587, 0.114])
    return (np.asarray(img, dtype=np.float64) * w).sum(axis=-1)


@dataclass(frozen=True)
class ColorMatchResult:
    image: np.ndarray
    degenerate_channels: tuple[int, ...]  # channels where only a mean shift was applied


def color_match(generated: np.ndarray, reference: np.ndarray) -> ColorMatchResult:
    """Affine per-channel moment transfer: output mean/std match the reference.

    Monotone per channel. A zero-variance generated channel gets a pure mean
    shift and is flagged in the result.
    """
    g = np.asarray(generated)
    r = np.asarray(reference)
    if g.shape != r.shape:
        raise DataError(f"shape mismatch: {g.shape} vs {r.shape}")
    g64 = g.astype(np.float64)
    r64 = r.astype(np.float64)
    if g64.ndim == 2:
        g64 = g64[..., None]
        r64 = r64[..., None]
        squeeze = True
    else:
        squeeze = False
    out = np.empty_like(g64)
    degenerate: list[int] = []
    for c in range(g64.shape[-1]):
        gm, gs = g64[..., c].mean(), g64[..., c].std()
        rm, rs = r64[..., c].mean(), r64[..., c].std()
        if gs < _DEGENERATE_STD:
            out[..., c] = g64[..., c] - gm + rm
            degenerate.append(c)
        else:
            out[..., c] = (g64[..., c] - gm) * (rs / gs) + rm
    if squeeze:
        out = out[..., 0]
    return ColorMatchResult(image=out.astype(g.dtype) if g.dtype.kind == "f" else out, degenerate_channels=tuple(degenerate))
