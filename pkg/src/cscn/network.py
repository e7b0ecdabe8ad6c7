"""Encoder/decoder building blocks and the flat-binary checkpoint format.

Stage s of the encoder halves spatial dims with ceil rounding, so a
(H, W) input yields feature maps of (ceil(H/2^s), ceil(W/2^s)).
"""

from __future__ import annotations

import json
import math
import os
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ChannelMismatch, TooSmall


def gn_group_count(channels: int, groups: int = 8) -> int:
    """Largest divisor of `channels` not exceeding `groups`."""
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return g


def stage_dims(height: int, width: int, stage: int) -> tuple:
    """Spatial dims after `stage` ceil-halvings."""
    return (math.ceil(height / 2 ** stage), math.ceil(width / 2 ** stage))


class ConvBlock(nn.Module):
    """Same-padded conv -> GroupNorm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 groups: int = 8):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {kernel}")
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, out_channels, kernel, padding=kernel // 2)
        self.norm = nn.GroupNorm(gn_group_count(out_channels, groups), out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.in_channels:
            raise ChannelMismatch(
                f"expected {self.in_channels} channels, got {x.shape[1]}"
            )
        return F.relu(self.norm(self.conv(x)))


class Downsample(nn.Module):
    """Stride-2 3x3 conv -> ReLU; output dims are ceil(input/2)."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[2] < 2 or x.shape[3] < 2:
            raise TooSmall(f"cannot halve a {x.shape[2]}x{x.shape[3]} map")
        return F.relu(self.conv(x))


@dataclass(frozen=True)
class EncoderConfig:
    """Stage widths and conv geometry of one branch encoder."""

    input_bands: int
    channel_schedule: tuple = (64, 128, 192, 256)
    kernel: int = 3
    gn_groups: int = 8

    def __post_init__(self):
        schedule = tuple(int(c) for c in self.channel_schedule)
        if len(schedule) < 2:
            raise ValueError("encoder needs at least 2 stages")
        if any(c < 1 for c in schedule):
            raise ValueError("channel widths must be >= 1")
        if self.kernel not in (3, 5):
            raise ValueError(f"kernel must be 3 or 5, got {self.kernel}")
        if self.input_bands < 1:
            raise ValueError("input_bands must be >= 1")
        object.__setattr__(self, "channel_schedule", schedule)

    @property
    def stages(self) -> int:
        return len(self.channel_schedule)


class Encoder(nn.Module):
    """Stack of [ConvBlock, Downsample] stages; returns every stage output."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        blocks, downs = [], []
        prev = cfg.input_bands
        for width in cfg.channel_schedule:
            blocks.append(ConvBlock(prev, width, cfg.kernel, cfg.gn_groups))
            downs.append(Downsample(width))
            prev = width
        self.blocks = nn.ModuleList(blocks)
        self.downs = nn.ModuleList(downs)

    def forward(self, x: torch.Tensor) -> list:
        feats = []
        for block, down in zip(self.blocks, self.downs):
            x = down(block(x))
            feats.append(x)
        return feats


class MiniDecoder(nn.Module):
    """Per-branch supervision head: nearest-neighbor upsampling back to full
    resolution, one conv block per step, then a 1x1 classifier.

    Returns (logits, last_feature); the last feature feeds the class
    contrastive loss.
    """

    def __init__(self, channel_schedule: tuple, class_count: int, kernel: int = 3,
                 gn_groups: int = 8):
        super().__init__()
        widths = list(reversed(channel_schedule))  # deepest first
        outs = widths[1:] + [widths[-1]]
        self.blocks = nn.ModuleList(
            ConvBlock(i, o, kernel, gn_groups) for i, o in zip(widths, outs)
        )
        self.classifier = nn.Conv2d(outs[-1], class_count, 1)

    def forward(self, deepest: torch.Tensor, out_hw: tuple):
        n = len(self.blocks)
        sizes = [stage_dims(out_hw[0], out_hw[1], s) for s in range(n)]
        x = deepest
        for i, block in enumerate(self.blocks):
            x = F.interpolate(x, size=sizes[n - 1 - i], mode="nearest")
            x = block(x)
        return self.classifier(x), x


class ClassifyHead(nn.Module):
    """Bilinear upsample to full resolution + 1x1 conv to class logits."""

    def __init__(self, in_channels: int, class_count: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, class_count, 1)

    def forward(self, x: torch.Tensor, out_hw: tuple) -> torch.Tensor:
        if x.shape[2:] != torch.Size(out_hw):
            x = F.interpolate(x, size=out_hw, mode="bilinear", align_corners=False)
        return self.proj(x)


# Fresh value for scalar score gains. Zero on purpose: the fused output
# then starts as the plain branch average, and the score projections only
# begin to train once the gain itself has been pushed off zero by the
# loss. Routing noise from half-learned scores costs more than the
# delayed start, so the gate earns its way open.
GATE_GAIN_INIT = 0.0


def init_parameters(module: nn.Module, seed: int) -> None:
    """Seeded fan-in-scaled normal init; biases and norm offsets zeroed.

    Each parameter draws from a generator keyed by (seed, parameter name),
    so a given name always starts from the same values under the same seed.
    Model variants that share submodules therefore share their starting
    weights exactly, and adding or removing a sibling module cannot reshuffle
    everything else.
    """
    for name, p in module.named_parameters():
        key = (seed * 0x9E3779B1 + zlib.crc32(name.encode())) & 0x7FFFFFFF
        gen = torch.Generator().manual_seed(key)
        with torch.no_grad():
            if p.dim() >= 2:
                fan_in = p.shape[1:].numel()
                p.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            elif name.endswith("gain"):
                p.fill_(GATE_GAIN_INIT)
            else:  # norm scale vectors
                p.fill_(1.0)


def save_checkpoint(path, module: nn.Module, meta: dict) -> None:
    """Write `<path>` (flat little-endian float32 payload) and
    `<path>.manifest.json` (name -> element offset/shape, plus meta).

    Both files land atomically via temp-file rename.
    """
    path = Path(path)
    chunks = []
    entries = {}
    offset = 0
    for name, p in module.state_dict().items():
        arr = p.detach().cpu().numpy().astype("<f4")
        entries[name] = {"offset": offset, "shape": list(arr.shape)}
        chunks.append(arr.tobytes())
        offset += arr.size
    manifest = {"params": entries, "total_elements": offset, "meta": meta}

    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    man_path = path.with_name(path.name + ".manifest.json")
    tmp = man_path.with_name(man_path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, man_path)


def load_checkpoint(path):
    """Read a checkpoint back as ({name: tensor}, meta)."""
    path = Path(path)
    manifest = json.loads(path.with_name(path.name + ".manifest.json").read_text())
    payload = np.frombuffer(path.read_bytes(), dtype="<f4")
    if payload.size != manifest["total_elements"]:
        raise ValueError(
            f"payload holds {payload.size} elements, manifest says "
            f"{manifest['total_elements']}"
        )
    state = {}
    for name, entry in manifest["params"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        flat = payload[entry["offset"]: entry["offset"] + count]
        state[name] = torch.from_numpy(flat.reshape(shape).copy())
    return state, manifest["meta"]
