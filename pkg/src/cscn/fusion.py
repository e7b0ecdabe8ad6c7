"""Point-wise fusion of the magnitude and derivative feature pyramids.

Each stage embeds both branch features into a shared width, scores each
branch per pixel against a query drawn from the running fused state, and
mixes the branches with the two-way softmax of those scores. Stages run
deepest first; the refined output is upsampled to seed the next stage.

Modes:
  attention - content-adaptive weights (the full mechanism)
  average   - fixed 0.5/0.5 mixing, no query/key parameters
  single    - one branch only, embed -> refine
"""

from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

from .errors import SpatialMismatch
from .network import GATE_GAIN_INIT, ConvBlock

_MODES = ("attention", "average", "single")

# Slope applied to the learned score gain. Kept shallow: routing should
# stay close to the plain average until the gain has genuinely grown,
# because a steep slope lets early half-trained scores saturate the
# softmax and feed the head noisily routed features it then memorizes.
SCORE_SHARPNESS = 0.1


class FusionStage(nn.Module):
    """One pyramid level of the fusion pathway."""

    def __init__(self, in_channels: int, fused_channels: int, kernel: int = 3,
                 gn_groups: int = 8, mode: str = "attention"):
        super().__init__()
        if mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
        self.mode = mode
        self.fused_channels = fused_channels
        self.embed_m = nn.Conv2d(in_channels, fused_channels, 1)
        self.embed_d = None if mode == "single" else nn.Conv2d(in_channels, fused_channels, 1)
        if mode == "attention":
            self.query = nn.Conv2d(fused_channels, fused_channels, 1, bias=False)
            self.key = nn.Conv2d(fused_channels, fused_channels, 1, bias=False)
            # Score gain starts closed: weights sit at exactly 0.5/0.5, so
            # routing switches on only once the objective actually pays for
            # moving the gain away from zero.
            self.gain = nn.Parameter(torch.full((), GATE_GAIN_INIT))
        self.refine = ConvBlock(fused_channels, fused_channels, kernel, gn_groups)

    def point_weights(self, state: torch.Tensor, x_m: torch.Tensor,
                      x_d: torch.Tensor):
        """Per-pixel convex weights (a_m, a_d) for the two branches.

        Scores are scaled dot products between the state's query and each
        branch's key; the pair passes through one softmax, so the weights
        sum to 1 and identical branch keys give exactly 0.5 each.
        """
        q = self.query(state)
        scale = self.gain * SCORE_SHARPNESS / math.sqrt(self.fused_channels)
        s_m = (q * self.key(x_m)).sum(dim=1, keepdim=True) * scale
        s_d = (q * self.key(x_d)).sum(dim=1, keepdim=True) * scale
        weights = torch.softmax(torch.stack([s_m, s_d], dim=0), dim=0)
        return weights[0], weights[1]

    def forward(self, f_m: torch.Tensor, f_d: torch.Tensor = None,
                state: torch.Tensor = None):
        """Returns (refined fused feature, magnitude weight map or None)."""
        x_m = self.embed_m(f_m)
        if self.mode == "single":
            return self.refine(x_m), None
        if f_d is None:
            raise ValueError(f"{self.mode} fusion needs both branch features")
        if f_m.shape[2:] != f_d.shape[2:]:
            raise SpatialMismatch(
                f"branch features disagree: {tuple(f_m.shape[2:])} vs "
                f"{tuple(f_d.shape[2:])}"
            )
        x_d = self.embed_d(f_d)
        if self.mode == "average":
            return self.refine(0.5 * (x_m + x_d)), None
        if state is None:
            state = 0.5 * (x_m + x_d)
        a_m, a_d = self.point_weights(state, x_m, x_d)
        return self.refine(a_m * x_m + a_d * x_d), a_m


class FusionPathway(nn.Module):
    """Deepest-to-shallowest chain of fusion stages.

    The refined output of stage s is bilinearly upsampled to stage s-1's
    dims and becomes that stage's query state; the shallowest refined map
    is the pathway output. Returns (output, weight maps deep->shallow).
    """

    def __init__(self, branch_channels: tuple, fused_channels: int,
                 kernel: int = 3, gn_groups: int = 8, mode: str = "attention"):
        super().__init__()
        self.stages = nn.ModuleList(
            FusionStage(c, fused_channels, kernel, gn_groups, mode)
            for c in branch_channels
        )

    def forward(self, feats_m: list, feats_d: list = None):
        n = len(self.stages)
        if len(feats_m) != n or (feats_d is not None and len(feats_d) != n):
            raise ValueError(f"pathway expects {n} pyramid levels")
        state = None
        weights = []
        out = None
        for s in reversed(range(n)):
            f_d = None if feats_d is None else feats_d[s]
            out, a_m = self.stages[s](feats_m[s], f_d, state)
            weights.append(a_m)
            if s > 0:
                state = F.interpolate(
                    out, size=feats_m[s - 1].shape[2:], mode="bilinear",
                    align_corners=False,
                )
        return out, weights
