"""Hierarchical encoder-decoder denoiser with skip connections.

Timestep embeddings are sinusoidal, projected by an MLP; class embeddings
(city, and an optional auxiliary table for manipulation/disaster classes)
live in learned tables of the same width and are summed into the timestep
embedding, which every residual block consumes.
"""
from __future__ import annotations

import math

import torch
from torch import nn


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) integer timesteps -> (B, dim) sinusoidal features."""
    half = dim // 2
    freqs = torch.exp(-math.log(10_000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(self.act(emb))[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return h + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.op = nn.Conv2d(ch, ch, 3, stride=2, padding=1)

    def forward(self, x):
        return self.op(x)


class Upsample(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)

    def forward(self, x):
        return self.conv(nn.functional.interpolate(x, scale_factor=2, mode="nearest"))


class ConditionalUNet(nn.Module):
    """Noise predictor eps(x_t, t, class, aux_class)."""

    def __init__(
        self,
        in_channels: int,
        base_channels: int,
        channel_mults: tuple[int, ...],
        res_blocks: int,
        class_count: int,
        aux_class_count: int = 0,
        out_channels: int = 3,
    ):
        super().__init__()
        self.class_count = class_count
        self.aux_class_count = aux_class_count
        emb_dim = base_channels * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(base_channels, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.base_channels = base_channels
        self.class_emb = nn.Embedding(class_count, emb_dim)
        self.aux_emb = nn.Embedding(aux_class_count, emb_dim) if aux_class_count else None

        chs = [base_channels * m for m in channel_mults]
        self.stem = nn.Conv2d(in_channels, chs[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        skip_chs = [chs[0]]
        cur = chs[0]
        for level, ch in enumerate(chs):
            blocks = nn.ModuleList()
            for _ in range(res_blocks):
                blocks.append(ResBlock(cur, ch, emb_dim))
                cur = ch
                skip_chs.append(cur)
            self.down_blocks.append(blocks)
            if level < len(chs) - 1:
                self.downs.append(Downsample(cur))
                skip_chs.append(cur)

        self.mid1 = ResBlock(cur, cur, emb_dim)
        self.mid2 = ResBlock(cur, cur, emb_dim)

        self.up_blocks = nn.ModuleList()
        self.ups = nn.ModuleList()
        for level, ch in reversed(list(enumerate(chs))):
            blocks = nn.ModuleList()
            for _ in range(res_blocks + 1):
                blocks.append(ResBlock(cur + skip_chs.pop(), ch, emb_dim))
                cur = ch
            self.up_blocks.append(blocks)
            if level > 0:
                self.ups.append(Upsample(cur))

        self.out = nn.Sequential(_norm(cur), nn.SiLU(), nn.Conv2d(cur, out_channels, 3, padding=1))

    def _embedding(self, t: torch.Tensor, class_ids: torch.Tensor, aux_ids: torch.Tensor | None) -> torch.Tensor:
        if ((class_ids < 0) | (class_ids >= self.class_count)).any():
            raise IndexError(
                f"class id out of range [0, {self.class_count}): {class_ids.tolist()}"
            )
        sin = sinusoidal_embedding(t, self.base_channels).to(self.class_emb.weight.dtype)
        emb = self.time_mlp(sin) + self.class_emb(class_ids)
        if aux_ids is not None:
            if self.aux_emb is None:
                raise IndexError("model has no auxiliary class table")
            if ((aux_ids < 0) | (aux_ids >= self.aux_class_count)).any():
                raise IndexError(
                    f"aux class id out of range [0, {self.aux_class_count}): {aux_ids.tolist()}"
                )
            emb = emb + self.aux_emb(aux_ids)
        return emb

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor,
        class_ids: torch.Tensor,
        aux_ids: torch.Tensor | None = None,
    ) -> torch.Tensor:
        emb = self._embedding(t, class_ids, aux_ids)
        h = self.stem(x)
        skips = [h]
        down_iter = iter(self.downs)
        for level, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, emb)
                skips.append(h)
            if level < len(self.down_blocks) - 1:
                h = next(down_iter)(h)
                skips.append(h)
        h = self.mid2(self.mid1(h, emb), emb)
        up_iter = iter(self.ups)
        for i, blocks in enumerate(self.up_blocks):
            for block in blocks:
                h = block(torch.cat([h, skips.pop()], dim=1), emb)
            if i < len(self.up_blocks) - 1:
                h = next(up_iter)(h)
        return self.out(h)
